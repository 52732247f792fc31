use std::fs;
use std::io::Write;
use std::path::Path;

use super::{centered_kernel_node, row_bandwidths, weighted_dependence_grad, KernelConfig};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, Var};

/// Which axis supplies the HSIC draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HsicAxis {
    /// Per sample: the `d` coordinates of two interest rows are the draws.
    #[default]
    Embedding,
    /// Per batch: the samples of a batch are the draws, each interest a
    /// `d`-dimensional variable.
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightUpdateConfig {
    /// Decorrelation importance.
    pub lambda: f64,
    /// Base step size of the projected gradient step.
    pub step_size: f64,
    pub kernel: KernelConfig,
    pub axis: HsicAxis,
}

impl Default for WeightUpdateConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            step_size: 0.01,
            kernel: KernelConfig::default(),
            axis: HsicAxis::Embedding,
        }
    }
}

/// Persistent per-sample weights in `[0, 1]`, initialised to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeightTable {
    weights: Vec<f64>,
    last_update: Vec<u64>,
}

impl SampleWeightTable {
    pub fn new(n: usize) -> Self {
        Self {
            weights: vec![1.0; n],
            last_update: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn get(&self, sample_id: usize) -> f64 {
        self.weights[sample_id]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Step at which each entry last changed (0 = never).
    pub fn last_update(&self, sample_id: usize) -> u64 {
        self.last_update[sample_id]
    }

    fn set(&mut self, sample_id: usize, value: f64, step: u64) {
        self.weights[sample_id] = value;
        self.last_update[sample_id] = step;
    }

    /// Writes `sample_id\tweight` lines in id order.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(self.weights.len() * 24);
        for (i, w) in self.weights.iter().enumerate() {
            writeln!(out, "{i}\t{w}").expect("write to Vec");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Reads a dump written by [`SampleWeightTable::dump`].
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut weights = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let bad = || Error::InvalidArgument(format!("{}:{}: bad weight line {line:?}", path.display(), n + 1));
            let (id, w) = line.split_once('\t').ok_or_else(bad)?;
            if id.parse::<usize>().ok() != Some(n) {
                return Err(bad());
            }
            let w: f64 = w.parse().map_err(|_| bad())?;
            if !(0.0..=1.0).contains(&w) {
                return Err(bad());
            }
            weights.push(w);
        }
        let n = weights.len();
        Ok(Self {
            weights,
            last_update: vec![0; n],
        })
    }
}

/// One sample's weight change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightUpdate {
    pub sample_id: usize,
    pub before: f64,
    pub after: f64,
    /// `∂ dependence / ∂ w` at `before`.
    pub gradient: f64,
    /// Objective value at `before` (already multiplied by λ).
    pub objective: f64,
    /// Whether the step was cut by the `[0, 1]` box.
    pub clipped: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightUpdateReport {
    pub updates: Vec<WeightUpdate>,
    /// Per-sample bandwidths used (embedding axis: one per interest row).
    pub bandwidths: Vec<Vec<f64>>,
}

fn project(sample_id: usize, before: f64, gradient: f64, objective: f64, cfg: &WeightUpdateConfig) -> WeightUpdate {
    let raw = before - cfg.step_size * cfg.lambda * gradient;
    let after = raw.clamp(0.0, 1.0);
    WeightUpdate {
        sample_id,
        before,
        after,
        gradient,
        objective: cfg.lambda * objective,
        clipped: after != raw,
    }
}

/// One projected gradient step on the weights of the listed samples.
///
/// `interests[k]` is the interest matrix of `sample_ids[k]` under the current
/// (frozen) model. Only listed entries of `table` change.
pub fn update_sample_weights(
    sample_ids: &[usize],
    interests: &[Matrix],
    table: &mut SampleWeightTable,
    cfg: &WeightUpdateConfig,
    step: u64,
) -> WeightUpdateReport {
    assert_eq!(sample_ids.len(), interests.len(), "one interest matrix per sample");
    let report = match cfg.axis {
        HsicAxis::Embedding => embedding_axis(sample_ids, interests, table, cfg),
        HsicAxis::Batch => batch_axis(sample_ids, interests, table, cfg),
    };
    for u in &report.updates {
        table.set(u.sample_id, u.after, step);
    }
    report
}

fn embedding_axis(
    sample_ids: &[usize],
    interests: &[Matrix],
    table: &SampleWeightTable,
    cfg: &WeightUpdateConfig,
) -> WeightUpdateReport {
    let mut report = WeightUpdateReport::default();
    for (&id, m) in sample_ids.iter().zip(interests) {
        let sigmas = row_bandwidths(m, &cfg.kernel);
        let before = table.get(id);
        let (objective, gradient) = weighted_dependence_grad(m, before, &sigmas);
        report.updates.push(project(id, before, gradient, objective, cfg));
        report.bandwidths.push(sigmas);
    }
    report
}

fn batch_axis(
    sample_ids: &[usize],
    interests: &[Matrix],
    table: &SampleWeightTable,
    cfg: &WeightUpdateConfig,
) -> WeightUpdateReport {
    let b = sample_ids.len();
    let c = interests.first().map_or(0, Matrix::rows);
    let mut report = WeightUpdateReport::default();
    if b < 2 || c < 2 {
        if c < 2 {
            log::warn!("interest dependence with {c} interest(s) is vacuous");
        }
        for &id in sample_ids {
            let w = table.get(id);
            report.updates.push(project(id, w, 0.0, 0.0, cfg));
        }
        return report;
    }

    // Bandwidth per interest from the unweighted batch.
    let sigmas: Vec<f64> = (0..c)
        .map(|i| {
            let rows: Vec<Matrix> = interests.iter().map(|m| Matrix::row_vector(m.row(i))).collect();
            let refs: Vec<&Matrix> = rows.iter().collect();
            cfg.kernel.resolve(&Matrix::concat_rows(&refs).expect("equal widths"))
        })
        .collect();

    let mut tape = Tape::new();
    let weights: Vec<Var> = sample_ids
        .iter()
        .map(|&id| tape.leaf(Matrix::scalar(table.get(id))))
        .collect();
    let scaled: Vec<Var> = interests
        .iter()
        .zip(&weights)
        .map(|(m, &w)| super::reweight_interests(&mut tape, m, w))
        .collect();
    let centered: Vec<Var> = (0..c)
        .map(|i| {
            let rows: Vec<Var> = scaled.iter().map(|&s| tape.gather_rows(s, &[i])).collect();
            let stacked = tape.concat_rows(&rows);
            centered_kernel_node(&mut tape, stacked, sigmas[i])
        })
        .collect();
    let norm = 1.0 / ((b as f64 - 1.0) * (b as f64 - 1.0));
    let mut total: Option<Var> = None;
    for i in 0..c {
        for j in (i + 1)..c {
            let dot = tape.frobenius_dot(centered[i], centered[j]);
            let term = tape.scale(dot, norm);
            total = Some(match total {
                Some(t) => tape.add(t, term),
                None => term,
            });
        }
    }
    let total = total.expect("c >= 2");
    let objective = tape.value(total).item();
    let grads = tape.backward(total);
    for (&id, &w) in sample_ids.iter().zip(&weights) {
        let g = grads.get(w).map_or(0.0, Matrix::item);
        report.updates.push(project(id, table.get(id), g, objective, cfg));
    }
    report.bandwidths.push(sigmas);
    report
}
