use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::data::{GraphBatch, Label, TreePair};
use crate::metrics::embedding_norm_std;
use crate::model::{Mode, ModelConfig, ModelError, ModelParams, Network};
use crate::objectives::{
    contrastive_loss, multi_objective_loss, soft_logits_loss, threshold_classify, LossConfig,
    ObjectiveError,
};

use super::adam::{adam_step, AdamState};
use super::checkpoint::Checkpoint;
use super::schedule::{epoch_batches, randomized_pairing, stream_rng};
use super::TrainError;

/// Hyperparameters of one training phase.
///
/// Phase 1 is contrastive pretraining, phase 2 the three-term objective and
/// phase 3 cross-entropy fine-tuning on thresholded similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub phase: u8,
    pub batch_size: usize,
    pub max_batches_per_epoch: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Also keep `epoch_NNNN.json` every this many epochs (0 keeps only `last.json`).
    #[serde(default)]
    pub checkpoint_every: usize,
    pub loss: LossConfig,
}

impl PhaseConfig {
    /// Full-scale schedule.
    pub fn full_size(phase: u8) -> Self {
        let (learning_rate, max_epochs) = match phase {
            1 => (1e-6, 50),
            2 => (1e-6, 100),
            _ => (5e-7, 100),
        };
        Self {
            phase,
            batch_size: 256,
            max_batches_per_epoch: 600,
            learning_rate,
            max_epochs,
            patience: 999,
            seed: 0,
            checkpoint_every: 1,
            loss: LossConfig::snli3(),
        }
    }

    /// Single-core schedule for the small network.
    pub fn desk(phase: u8) -> Self {
        let (learning_rate, max_epochs) = match phase {
            1 => (1e-3, 10),
            2 => (1e-3, 40),
            _ => (5e-4, 30),
        };
        Self {
            phase,
            batch_size: 32,
            max_batches_per_epoch: 20,
            learning_rate,
            max_epochs,
            patience: 999,
            seed: 0,
            checkpoint_every: 0,
            loss: LossConfig::snli3(),
        }
    }

    pub fn preset(name: &str, phase: u8) -> Option<Self> {
        match name {
            "paper" | "full" => Some(Self::full_size(phase)),
            "desk" => Some(Self::desk(phase)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(1..=3).contains(&self.phase) {
            return Err(TrainError::Config(format!("phase {} is not 1, 2 or 3", self.phase)));
        }
        if self.phase < 3 && self.batch_size < 2 {
            return Err(TrainError::Config(
                "in-batch negatives need batch_size >= 2".into(),
            ));
        }
        if self.batch_size == 0 || self.max_batches_per_epoch == 0 {
            return Err(TrainError::Config("batch_size and max_batches_per_epoch must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        self.loss.validate()?;
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub phase: u8,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Thresholded accuracy on the batches as they were trained.
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    /// Population std of embedding norms in the epoch's final batch.
    pub embedding_norm_std: f64,
    /// Anchors without a positive plus terms without their class.
    pub skipped_anchors: usize,
    /// Batches whose loss had no usable anchor.
    pub skipped_batches: usize,
    pub batches: usize,
    pub wall_time_secs: f64,
}

impl EpochReport {
    /// Copy with the timing zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_secs: 0.0,
            ..self.clone()
        }
    }
}

/// Where a phase's parameters come from.
#[derive(Debug, Clone)]
pub enum Start {
    /// Fresh initialization from the phase seed.
    Scratch,
    /// Parameters of an earlier phase, with a fresh optimizer.
    Continue(Box<Checkpoint>),
    /// Mid-phase checkpoint of this phase; training picks up at the next epoch.
    Resume(Box<Checkpoint>),
}

pub struct PhaseRun<'a> {
    pub model: &'a ModelConfig,
    pub train: &'a [TreePair],
    pub val: &'a [TreePair],
    pub config: &'a PhaseConfig,
    pub out_dir: &'a Path,
}

#[derive(Debug, Clone)]
pub struct PhaseOutcome {
    pub reports: Vec<EpochReport>,
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub stopped_early: bool,
}

pub fn phase_dir(out_dir: &Path, phase: u8) -> PathBuf {
    out_dir.join(format!("phase{phase}"))
}

pub fn last_checkpoint(out_dir: &Path, phase: u8) -> PathBuf {
    phase_dir(out_dir, phase).join("last.json")
}

pub fn epoch_checkpoint(out_dir: &Path, phase: u8, epoch: usize) -> PathBuf {
    phase_dir(out_dir, phase).join(format!("epoch_{epoch:04}.json"))
}

pub fn metrics_log(out_dir: &Path) -> PathBuf {
    out_dir.join("metrics.jsonl")
}

/// Start for `phase`: phase 1 starts fresh; later phases need the previous
/// phase's last checkpoint unless `skip_previous` is set.
pub fn start_for_phase(out_dir: &Path, phase: u8, skip_previous: bool) -> Result<Start, TrainError> {
    if phase <= 1 {
        return Ok(Start::Scratch);
    }
    let prev = last_checkpoint(out_dir, phase - 1);
    if prev.exists() {
        return Ok(Start::Continue(Box::new(Checkpoint::load(&prev)?)));
    }
    if skip_previous {
        return Ok(Start::Scratch);
    }
    Err(TrainError::Protocol(format!(
        "phase {phase} needs {} (or an explicit skip of the earlier phase)",
        prev.display()
    )))
}

struct BatchResult {
    loss: Var,
    a: Var,
    b: Var,
    skipped: usize,
}

fn phase_loss(
    tape: &mut Tape,
    net: &Network,
    pairs: &[&TreePair],
    config: &PhaseConfig,
    pairing_rng: Option<&mut rand_chacha::ChaCha8Rng>,
) -> Result<BatchResult, TrainError> {
    let labels: Vec<Label> = pairs.iter().map(|p| p.label).collect();
    let n = pairs.len();
    let randomize = config.phase == 1 && net.config().mode == Mode::Matching;
    let (a, b) = match pairing_rng.filter(|_| randomize) {
        Some(rng) => {
            let perm = randomized_pairing(n, rng)?;
            let item = |i: usize| {
                if i < n {
                    &pairs[i].tree_a
                } else {
                    &pairs[i - n].tree_b
                }
            };
            let trees: Vec<_> = perm.chunks(2).map(|c| (item(c[0]), item(c[1]))).collect();
            let batch = GraphBatch::from_trees(&trees, vec![], vec![])?;
            let out = net.forward(tape, &batch)?;
            let mut slot = vec![0; 2 * n];
            for (g, &i) in perm.iter().enumerate() {
                slot[i] = g;
            }
            let a = tape.gather_rows(out.graphs, Arc::from(&slot[..n]))?;
            let b = tape.gather_rows(out.graphs, Arc::from(&slot[n..]))?;
            (a, b)
        }
        None => {
            let trees: Vec<_> = pairs.iter().map(|p| (&p.tree_a, &p.tree_b)).collect();
            let batch = GraphBatch::from_trees(&trees, vec![], vec![])?;
            let out = net.forward(tape, &batch)?;
            (out.a, out.b)
        }
    };
    let (loss, skipped) = match config.phase {
        1 => {
            let out = contrastive_loss(tape, a, b, &labels, config.loss.temperature)?;
            (out.loss, out.skipped)
        }
        2 => {
            let out = multi_objective_loss(tape, a, b, &labels, &config.loss)?;
            (out.loss, out.missing_class.len())
        }
        _ => (soft_logits_loss(tape, a, b, &labels, &config.loss)?.loss, 0),
    };
    Ok(BatchResult { loss, a, b, skipped })
}

fn row_cosines(a: &Tensor, b: &Tensor) -> Vec<f64> {
    (0..a.rows())
        .map(|k| crate::objectives::cosine(a.row(k), b.row(k)).unwrap_or(0.0))
        .collect()
}

fn count_correct(a: &Tensor, b: &Tensor, pairs: &[&TreePair], loss: &LossConfig) -> usize {
    row_cosines(a, b)
        .iter()
        .zip(pairs)
        .filter(|(&s, p)| threshold_classify(s, loss.theta_low, loss.theta_high) == p.label)
        .count()
}

/// Loss and accuracy on held-out pairs, in file order, without updates.
fn validate(
    model: &ModelConfig,
    params: &ModelParams,
    val: &[TreePair],
    config: &PhaseConfig,
) -> Result<(Option<f64>, Option<f64>), TrainError> {
    if val.is_empty() {
        return Ok((None, None));
    }
    let (mut loss_sum, mut loss_batches, mut correct) = (0.0, 0usize, 0usize);
    for chunk in val.chunks(config.batch_size) {
        let pairs: Vec<&TreePair> = chunk.iter().collect();
        let mut tape = Tape::new();
        let (net, _) = Network::record(&mut tape, model, params, false)?;
        match phase_loss(&mut tape, &net, &pairs, config, None) {
            Ok(r) => {
                loss_sum += tape.value(r.loss).item();
                loss_batches += 1;
                correct += count_correct(tape.value(r.a), tape.value(r.b), &pairs, &config.loss);
            }
            Err(TrainError::Objective(ObjectiveError::EmptyLoss(_))) => {
                let trees: Vec<_> = pairs.iter().map(|p| (&p.tree_a, &p.tree_b)).collect();
                let batch = GraphBatch::from_trees(&trees, vec![], vec![])?;
                let out = net.forward(&mut tape, &batch)?;
                correct += count_correct(tape.value(out.a), tape.value(out.b), &pairs, &config.loss);
            }
            Err(e) => return Err(e),
        }
    }
    let loss = (loss_batches > 0).then(|| loss_sum / loss_batches as f64);
    Ok((loss, Some(correct as f64 / val.len() as f64)))
}

fn append_report(out_dir: &Path, report: &EpochReport) -> Result<(), TrainError> {
    let path = metrics_log(out_dir);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| TrainError::io(&path, e))?;
    let line = serde_json::to_string(report).expect("reports serialize");
    writeln!(f, "{line}").map_err(|e| TrainError::io(&path, e))
}

/// Trains one phase, writing a checkpoint and a metrics line after every epoch.
pub fn run_phase(run: &PhaseRun, start: Start) -> Result<PhaseOutcome, TrainError> {
    let config = run.config;
    config.validate()?;
    run.model.validate()?;
    if run.train.len() < 2 {
        return Err(TrainError::DegenerateBatch(format!(
            "{} training pairs",
            run.train.len()
        )));
    }
    let (mut params, mut optimizer, first_epoch) = match start {
        Start::Scratch => {
            let p = ModelParams::init(run.model, config.seed)?;
            let o = AdamState::new(p.tensors());
            (p, o, 1)
        }
        Start::Continue(ck) => {
            let p = ck.params_for(run.model)?;
            let o = AdamState::new(p.tensors());
            (p, o, 1)
        }
        Start::Resume(ck) => {
            if ck.phase != config.phase {
                return Err(TrainError::Protocol(format!(
                    "cannot resume phase {} from a phase {} checkpoint",
                    config.phase, ck.phase
                )));
            }
            let p = ck.params_for(run.model)?;
            (p, ck.optimizer.clone(), ck.epoch + 1)
        }
    };
    fs::create_dir_all(phase_dir(run.out_dir, config.phase))
        .map_err(|e| TrainError::io(run.out_dir, e))?;

    let mut reports = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in first_epoch..=config.max_epochs {
        let started = Instant::now();
        let batches = epoch_batches(
            config.seed,
            config.phase,
            epoch,
            run.train.len(),
            config.batch_size,
            config.max_batches_per_epoch,
        );
        let (mut loss_sum, mut used, mut skipped_batches, mut skipped_anchors) = (0.0, 0, 0, 0);
        let (mut correct, mut seen) = (0usize, 0usize);
        let mut last_embeddings: Vec<Vec<f64>> = Vec::new();
        for (bi, indices) in batches.iter().enumerate() {
            let pairs: Vec<&TreePair> = indices.iter().map(|&i| &run.train[i]).collect();
            let mut tape = Tape::new();
            let (net, vars) = Network::record(&mut tape, run.model, &params, true)?;
            let mut rng = stream_rng(config.seed, config.phase, epoch, bi as u64 + 1);
            let result = match phase_loss(&mut tape, &net, &pairs, config, Some(&mut rng)) {
                Ok(r) => r,
                Err(TrainError::Objective(ObjectiveError::EmptyLoss(_))) => {
                    skipped_batches += 1;
                    continue;
                }
                Err(e) if numeric_cause(&e) => {
                    return Err(TrainError::NonFinite {
                        what: e.to_string(),
                        phase: config.phase,
                        epoch,
                        batch: bi,
                        last_good: last_good(run.out_dir, config.phase),
                    })
                }
                Err(e) => return Err(e),
            };
            let value = tape.value(result.loss).item();
            if !value.is_finite() {
                return Err(TrainError::NonFinite {
                    what: format!("loss {value}"),
                    phase: config.phase,
                    epoch,
                    batch: bi,
                    last_good: last_good(run.out_dir, config.phase),
                });
            }
            let (ta, tb) = (tape.value(result.a), tape.value(result.b));
            correct += count_correct(ta, tb, &pairs, &config.loss);
            seen += pairs.len();
            last_embeddings = (0..ta.rows())
                .map(|k| ta.row(k).to_vec())
                .chain((0..tb.rows()).map(|k| tb.row(k).to_vec()))
                .collect();
            tape.backward(result.loss)?;
            let grads: Vec<Tensor> = vars
                .iter()
                .zip(params.tensors())
                .map(|(&v, p)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            let names = params.names().to_vec();
            adam_step(params.tensors_mut(), &grads, &names, &mut optimizer, config.learning_rate)?;
            if let Some(name) = params.first_non_finite() {
                return Err(TrainError::NonFinite {
                    what: format!("parameter {name}"),
                    phase: config.phase,
                    epoch,
                    batch: bi,
                    last_good: last_good(run.out_dir, config.phase),
                });
            }
            loss_sum += value;
            used += 1;
            skipped_anchors += result.skipped;
        }
        if used == 0 {
            return Err(TrainError::DegenerateBatch(format!(
                "epoch {epoch}: every batch lacked usable anchors"
            )));
        }
        let (val_loss, val_accuracy) = validate(run.model, &params, run.val, config)?;
        let report = EpochReport {
            phase: config.phase,
            epoch,
            train_loss: loss_sum / used as f64,
            val_loss,
            train_accuracy: correct as f64 / seen.max(1) as f64,
            val_accuracy,
            embedding_norm_std: embedding_norm_std(&last_embeddings).unwrap_or(0.0),
            skipped_anchors,
            skipped_batches,
            batches: used,
            wall_time_secs: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "phase {} epoch {} loss {:.5} acc {:.3} val {:?}",
            report.phase,
            report.epoch,
            report.train_loss,
            report.train_accuracy,
            report.val_accuracy
        );
        let ck = Checkpoint::new(run.model, &params, &optimizer, config.seed, config.phase, epoch);
        ck.save(&last_checkpoint(run.out_dir, config.phase))?;
        if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
            ck.save(&epoch_checkpoint(run.out_dir, config.phase, epoch))?;
        }
        append_report(run.out_dir, &report)?;
        reports.push(report);

        if let Some(v) = val_loss {
            if v < best_val {
                best_val = v;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(PhaseOutcome {
        reports,
        params,
        optimizer,
        stopped_early,
    })
}

/// Forward-pass failures that only non-finite values can cause.
fn numeric_cause(e: &TrainError) -> bool {
    let tensor = match e {
        TrainError::Tensor(t)
        | TrainError::Model(ModelError::Tensor(t))
        | TrainError::Objective(ObjectiveError::Tensor(t)) => t,
        _ => return false,
    };
    matches!(
        tensor,
        TensorError::NonFinite { .. } | TensorError::DegenerateSegment { .. }
    )
}

fn last_good(out_dir: &Path, phase: u8) -> Option<PathBuf> {
    let p = last_checkpoint(out_dir, phase);
    p.exists().then_some(p)
}
