//! Alternating optimisation: one Adam step on the weighted loss with the
//! sample weights frozen, then one projected step on the weights of the same
//! batch with the network frozen.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{batch_iter, make_examples, Batch, EvalSet, SequenceDataset, TrainingExample};
use crate::decorrelate::{
    interest_dependence_with, row_bandwidths, update_sample_weights, HsicAxis, KernelConfig, SampleWeightTable,
    WeightUpdateConfig, WeightUpdateReport,
};
use crate::error::{Error, Result};
use crate::evaluate::recall50;
use crate::model::{example_forward, infer_interests, sample_negatives, weighted_loss, ModelParams, ModelShape};
use crate::numerics::{Matrix, Tape};

/// What the loop does with the sample weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    /// Weighted loss plus a weight step after every parameter step.
    #[default]
    Reweighted,
    /// Plain mean loss; the weight table is never touched.
    Unweighted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    /// Attention hidden width.
    pub hidden: usize,
    pub interests: usize,
    pub lambda: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub negatives: usize,
    pub l_max: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    /// Hard cap on parameter steps, if any.
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub eval_every: u64,
    pub weight_step: f64,
    pub kernel: KernelConfig,
    pub axis: HsicAxis,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            hidden: 256,
            interests: 4,
            lambda: 1.0,
            batch_size: 128,
            lr: 0.001,
            negatives: 10,
            l_max: 20,
            patience: 5,
            max_epochs: 20,
            max_steps: None,
            seed: 0,
            eval_every: 500,
            weight_step: 0.01,
            kernel: KernelConfig::default(),
            axis: HsicAxis::Embedding,
            variant: Variant::Reweighted,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("hidden", self.hidden),
            ("interests", self.interests),
            ("batch_size", self.batch_size),
            ("negatives", self.negatives),
            ("l_max", self.l_max),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
            ("eval_every", self.eval_every as usize),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_step > 0.0 && self.weight_step.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight_step must be positive, got {}",
                self.weight_step
            )));
        }
        if self.max_steps == Some(0) {
            return Err(Error::InvalidArgument("max_steps must be positive".into()));
        }
        self.kernel.validate()
    }

    pub fn shape(&self, num_items: usize) -> ModelShape {
        ModelShape {
            num_items,
            dim: self.dim,
            hidden: self.hidden,
            interests: self.interests,
            l_max: self.l_max,
        }
    }

    fn weight_update(&self) -> WeightUpdateConfig {
        WeightUpdateConfig {
            lambda: self.lambda,
            step_size: self.weight_step,
            kernel: self.kernel,
            axis: self.axis,
        }
    }
}

/// Glorot-uniform parameters; the pad row is zero.
pub fn init_params(shape: ModelShape, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::zeros(shape);
    let pad = p.pad_index();
    for (k, m) in p.tensors_mut().into_iter().enumerate() {
        let rows = if k == 0 { pad } else { m.rows() };
        let cols = m.cols();
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        for v in &mut m.as_mut_slice()[..rows * cols] {
            *v = rng.random_range(-bound..=bound);
        }
    }
    p
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

/// Moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

/// One bias-corrected Adam update of `param` in place. `step` counts from 1.
pub fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], step: u64, lr: f64) {
    let c1 = 1.0 - BETA1.powf(step as f64);
    let c2 = 1.0 - BETA2.powf(step as f64);
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
    }
}

impl AdamState {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        let zeros: Vec<Matrix> = params
            .tensors()
            .iter()
            .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        Self {
            lr,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies `grads` (in [`ModelParams::tensors`] order); the pad row of
    /// the item table is left untouched.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Matrix; 4]) {
        self.step += 1;
        let pad = params.pad_index();
        for (k, p) in params.tensors_mut().into_iter().enumerate() {
            assert_eq!(p.shape(), grads[k].shape(), "gradient shape for tensor {k}");
            let live = if k == 0 { pad * p.cols() } else { p.len() };
            adam_update(
                &mut p.as_mut_slice()[..live],
                &grads[k].as_slice()[..live],
                &mut self.first[k].as_mut_slice()[..live],
                &mut self.second[k].as_mut_slice()[..live],
                self.step,
                self.lr,
            );
        }
    }
}

/// One row of the training trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub step: u64,
    /// Mean unweighted loss of the batch.
    pub loss: f64,
    /// Mean unweighted interest dependence of the batch after the step.
    pub hsic: f64,
    /// Validation Recall@50 in percent, on evaluation steps.
    pub recall50: Option<f64>,
}

pub const TRACE_HEADER: &str = "step,loss,hsic,recall50";

impl TraceRecord {
    pub fn csv_line(&self) -> String {
        let recall = self.recall50.map(|r| r.to_string()).unwrap_or_default();
        format!("{},{},{},{}", self.step, self.loss, self.hsic, recall)
    }
}

/// Flushes each record as it arrives.
pub struct TraceWriter {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        };
        w.line(TRACE_HEADER)?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn record(&mut self, r: &TraceRecord) -> Result<()> {
        self.line(&r.csv_line())
    }
}

/// Per-batch outcome of [`Trainer::step`].
#[derive(Debug, Clone)]
pub struct StepStats {
    pub step: u64,
    pub loss: f64,
    pub hsic: f64,
    pub weights: Option<WeightUpdateReport>,
}

/// Step-level training state.
pub struct Trainer {
    cfg: TrainConfig,
    params: ModelParams,
    adam: AdamState,
    table: SampleWeightTable,
    examples: Vec<TrainingExample>,
    negative_rng: ChaCha8Rng,
    step: u64,
    epoch: u64,
}

impl Trainer {
    pub fn new(train: &SequenceDataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let examples = make_examples(train, cfg.l_max);
        if examples.is_empty() {
            return Err(Error::InvalidArgument("training data yields no examples".into()));
        }
        if train.num_items() < 2 {
            return Err(Error::InvalidArgument("training needs at least two items".into()));
        }
        let params = init_params(cfg.shape(train.num_items()), cfg.seed);
        let adam = AdamState::new(&params, cfg.lr);
        let mut negative_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        negative_rng.set_stream(u64::MAX);
        Ok(Self {
            cfg: cfg.clone(),
            table: SampleWeightTable::new(examples.len()),
            params,
            adam,
            examples,
            negative_rng,
            step: 0,
            epoch: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn weights(&self) -> &SampleWeightTable {
        &self.table
    }

    pub fn examples(&self) -> &[TrainingExample] {
        &self.examples
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Batches of the next epoch, in its seeded order.
    pub fn next_epoch(&mut self) -> Vec<Batch> {
        let pad = self.params.pad_index();
        let batches = batch_iter(
            &self.examples,
            self.cfg.batch_size,
            self.cfg.l_max,
            pad,
            self.cfg.seed,
            self.epoch,
        )
        .collect();
        self.epoch += 1;
        batches
    }

    fn batch_weights(&self, batch: &Batch) -> Vec<f64> {
        batch.sample_ids.iter().map(|&id| self.table.get(id)).collect()
    }

    /// Parameter gradients of the mean weighted loss, and the mean
    /// unweighted loss.
    fn gradients(&mut self, batch: &Batch) -> Result<([Matrix; 4], f64)> {
        let n = batch.len() as f64;
        let num_items = self.params.num_items();
        let weights = match self.cfg.variant {
            Variant::Reweighted => Some(self.batch_weights(batch)),
            Variant::Unweighted => None,
        };
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let mut total = None;
        let mut raw_loss = 0.0;
        for i in 0..batch.len() {
            let target = batch.targets[i];
            let negatives = sample_negatives(&mut self.negative_rng, num_items, target, self.cfg.negatives);
            let nodes = example_forward(&mut tape, &vars, batch.prefix(i), target, &negatives)?;
            raw_loss += tape.value(nodes.loss).item();
            let w = weights.as_ref().map_or(1.0, |w| w[i]);
            let term = weighted_loss(&mut tape, nodes.loss, w / n);
            total = Some(match total {
                Some(t) => tape.add(t, term),
                None => term,
            });
        }
        let total = total.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let mean_loss = raw_loss / n;
        if !mean_loss.is_finite() || !tape.value(total).item().is_finite() {
            return Err(Error::Diverged {
                epoch: self.epoch.saturating_sub(1),
                step: self.step + 1,
                batch_len: batch.len(),
                first_sample: batch.sample_ids[0],
            });
        }
        let grads = tape.backward(total);
        let g = [
            grads.wrt(vars.items),
            grads.wrt(vars.positions),
            grads.wrt(vars.w1),
            grads.wrt(vars.w2),
        ];
        Ok((g, mean_loss))
    }

    /// One alternation on `batch`: Adam step on the parameters, then (for
    /// [`Variant::Reweighted`]) one weight step on the batch entries.
    pub fn step(&mut self, batch: &Batch) -> Result<StepStats> {
        let weights_before = cfg!(debug_assertions).then(|| self.batch_weights(batch));
        let (grads, loss) = self.gradients(batch)?;
        self.adam.step(&mut self.params, &grads);
        if let Some(w) = weights_before {
            debug_assert_eq!(w, self.batch_weights(batch), "weights moved during the parameter step");
        }
        self.step += 1;

        let interests: Vec<Matrix> = (0..batch.len())
            .map(|i| infer_interests(&self.params, batch.prefix(i)))
            .collect::<Result<_>>()?;
        let fingerprint = cfg!(debug_assertions).then(|| self.params.fingerprint());
        let report = match self.cfg.variant {
            Variant::Reweighted => Some(update_sample_weights(
                &batch.sample_ids,
                &interests,
                &mut self.table,
                &self.cfg.weight_update(),
                self.step,
            )),
            Variant::Unweighted => None,
        };
        if let Some(f) = fingerprint {
            debug_assert_eq!(f, self.params.fingerprint(), "parameters moved during the weight step");
        }

        let hsic = interests
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let sigmas = match &report {
                    Some(r) if self.cfg.axis == HsicAxis::Embedding => r.bandwidths[i].clone(),
                    _ => row_bandwidths(m, &self.cfg.kernel),
                };
                interest_dependence_with(m, &sigmas)
            })
            .sum::<f64>()
            / batch.len() as f64;
        Ok(StepStats {
            step: self.step,
            loss,
            hsic,
            weights: report,
        })
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best validation evaluation.
    pub params: ModelParams,
    pub best_step: u64,
    /// Best validation Recall@50 in percent.
    pub best_recall50: f64,
    pub weights: SampleWeightTable,
    pub traces: Vec<TraceRecord>,
    pub steps: u64,
    pub epochs: u64,
    pub stopped_early: bool,
}

/// Trains to early stopping, `max_epochs` or `max_steps`, whichever comes
/// first. Validation runs every `eval_every` steps and once more at the end
/// if the last step was not evaluated.
pub fn train(
    train: &SequenceDataset,
    valid: &EvalSet,
    cfg: &TrainConfig,
    mut trace: Option<&mut TraceWriter>,
) -> Result<TrainOutcome> {
    if valid.is_empty() {
        return Err(Error::InvalidArgument("validation set is empty".into()));
    }
    let mut trainer = Trainer::new(train, cfg)?;
    let mut traces = Vec::new();
    let mut best: Option<(f64, u64, ModelParams)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut evaluate = |trainer: &Trainer, record: &mut TraceRecord| -> Result<bool> {
        let r = 100.0 * recall50(trainer.params(), valid)?;
        record.recall50 = Some(r);
        log::info!("step {}: validation recall@50 {r:.3}", record.step);
        if best.as_ref().is_none_or(|(b, _, _)| r > *b) {
            best = Some((r, record.step, trainer.params().clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        Ok(since_best >= cfg.patience)
    };

    'epochs: for epoch in 0..cfg.max_epochs {
        let batches = trainer.next_epoch();
        let count = batches.len();
        for (k, batch) in batches.iter().enumerate() {
            let stats = trainer.step(batch)?;
            let mut record = TraceRecord {
                step: stats.step,
                loss: stats.loss,
                hsic: stats.hsic,
                recall50: None,
            };
            let at_cap = cfg.max_steps.is_some_and(|m| stats.step >= m);
            let last = at_cap || (epoch + 1 == cfg.max_epochs && k + 1 == count);
            let mut stop = false;
            if stats.step % cfg.eval_every == 0 || last {
                stop = evaluate(&trainer, &mut record)?;
            }
            if let Some(w) = trace.as_deref_mut() {
                w.record(&record)?;
            }
            traces.push(record);
            if stop {
                stopped_early = true;
                break 'epochs;
            }
            if at_cap {
                break 'epochs;
            }
        }
    }
    let (best_recall50, best_step, params) = best.expect("at least one evaluation");
    Ok(TrainOutcome {
        params,
        best_step,
        best_recall50,
        weights: trainer.table,
        traces,
        steps: trainer.step,
        epochs: trainer.epoch,
        stopped_early,
    })
}
