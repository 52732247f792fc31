//! Self-attentive multi-interest network.
//!
//! For a prefix of `t` items the network builds `E = V[prefix] + P[0..t]`
//! (`t×d`), attends with `A = softmax(W2 · tanh(W1 · Eᵀ))` (`c×t`) and
//! returns `M = A · E` (`c×d`), one row per interest. Training picks the row
//! with the largest inner product against the target embedding and scores it
//! with a sampled softmax.

mod checkpoint;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, Tape, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_BIN, CHECKPOINT_MANIFEST};

/// Logit offset applied to padded positions before the attention softmax.
pub const MASK_OFFSET: f64 = -1e9;

/// Network shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub num_items: usize,
    pub dim: usize,
    pub hidden: usize,
    pub interests: usize,
    pub l_max: usize,
}

/// Trainable parameters.
///
/// `items` has one extra trailing row for the pad index; it stays zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub items: Matrix,
    pub positions: Matrix,
    pub w1: Matrix,
    pub w2: Matrix,
}

impl ModelParams {
    pub fn zeros(shape: ModelShape) -> Self {
        Self {
            items: Matrix::zeros(shape.num_items + 1, shape.dim),
            positions: Matrix::zeros(shape.l_max, shape.dim),
            w1: Matrix::zeros(shape.hidden, shape.dim),
            w2: Matrix::zeros(shape.interests, shape.hidden),
        }
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            num_items: self.items.rows() - 1,
            dim: self.items.cols(),
            hidden: self.w1.rows(),
            interests: self.w2.rows(),
            l_max: self.positions.rows(),
        }
    }

    pub fn num_items(&self) -> usize {
        self.items.rows() - 1
    }

    pub fn pad_index(&self) -> usize {
        self.items.rows() - 1
    }

    /// Named tensors in checkpoint order.
    pub fn tensors(&self) -> [(&'static str, &Matrix); 4] {
        [
            ("items", &self.items),
            ("positions", &self.positions),
            ("w1", &self.w1),
            ("w2", &self.w2),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Matrix; 4] {
        [&mut self.items, &mut self.positions, &mut self.w1, &mut self.w2]
    }

    /// Checks shape consistency, finiteness and the zero pad row.
    pub fn validate(&self) -> Result<()> {
        let d = self.items.cols();
        let ok = self.items.rows() >= 2
            && d >= 1
            && self.positions.cols() == d
            && self.positions.rows() >= 1
            && self.w1.cols() == d
            && self.w1.rows() >= 1
            && self.w2.cols() == self.w1.rows()
            && self.w2.rows() >= 1;
        if !ok {
            return Err(Error::Shape(format!(
                "inconsistent parameters: items {:?}, positions {:?}, w1 {:?}, w2 {:?}",
                self.items.shape(),
                self.positions.shape(),
                self.w1.shape(),
                self.w2.shape()
            )));
        }
        for (name, m) in self.tensors() {
            if !m.is_finite() {
                return Err(Error::NonFinite(format!("parameter {name}")));
            }
        }
        if self.items.row(self.pad_index()).iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidArgument("pad embedding row is not zero".into()));
        }
        Ok(())
    }

    /// Registers every parameter as a borrowed leaf.
    pub fn register<'a>(&'a self, tape: &mut Tape<'a>) -> ParamVars {
        ParamVars {
            items: tape.leaf_ref(&self.items),
            positions: tape.leaf_ref(&self.positions),
            w1: tape.leaf_ref(&self.w1),
            w2: tape.leaf_ref(&self.w2),
            pad: self.pad_index(),
            l_max: self.positions.rows(),
        }
    }

    /// Order-sensitive FNV-1a digest of every parameter bit pattern.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, m) in self.tensors() {
            for v in m.as_slice() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Tape handles for the parameters of one evaluation.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub items: Var,
    pub positions: Var,
    pub w1: Var,
    pub w2: Var,
    pad: usize,
    l_max: usize,
}

/// `E` for the first `valid_length` entries of `prefix`: row `k` is
/// `V[prefix[k]] + P[k]`.
pub fn build_input_embedding(
    tape: &mut Tape<'_>,
    vars: &ParamVars,
    prefix: &[usize],
    valid_length: usize,
) -> Result<Var> {
    if valid_length == 0 || valid_length > vars.l_max || valid_length > prefix.len() {
        return Err(Error::InvalidArgument(format!(
            "valid length {valid_length} must be in 1..={} and within the prefix of {}",
            vars.l_max,
            prefix.len()
        )));
    }
    let items = &prefix[..valid_length];
    if let Some(&bad) = items.iter().find(|&&i| i >= vars.pad) {
        return Err(Error::OutOfRange {
            what: "item vocabulary",
            index: bad,
            size: vars.pad,
        });
    }
    let positions: Vec<usize> = (0..valid_length).collect();
    let v = tape.gather_rows(vars.items, items);
    let p = tape.gather_rows(vars.positions, &positions);
    Ok(tape.add(v, p))
}

/// Nodes produced by [`extract_interests`].
#[derive(Debug, Clone, Copy)]
pub struct InterestNodes {
    /// `c×t` attention.
    pub attention: Var,
    /// `c×d` interest matrix.
    pub interests: Var,
}

/// Self-attentive extractor. `mask[k] == false` removes position `k` from
/// the softmax.
pub fn extract_interests(
    tape: &mut Tape<'_>,
    vars: &ParamVars,
    embedding: Var,
    mask: Option<&[bool]>,
) -> InterestNodes {
    let hidden = tape.matmul_transb(vars.w1, embedding);
    let hidden = tape.tanh(hidden);
    let mut logits = tape.matmul(vars.w2, hidden);
    if let Some(mask) = mask {
        let (c, t) = tape.value(logits).shape();
        assert_eq!(mask.len(), t, "mask length {} for {t} positions", mask.len());
        assert!(mask.iter().any(|&m| m), "mask removes every position");
        let mut offset = Matrix::zeros(c, t);
        for r in 0..c {
            for (k, &keep) in mask.iter().enumerate() {
                if !keep {
                    offset.set(r, k, MASK_OFFSET);
                }
            }
        }
        logits = tape.add_const(logits, &offset);
    }
    let attention = tape.softmax_rows(logits);
    let interests = tape.matmul(attention, embedding);
    InterestNodes {
        attention,
        interests,
    }
}

/// Index of the interest row with the largest inner product with `target`;
/// ties go to the lowest index.
pub fn select_interest(interests: &Matrix, target: &[f64]) -> usize {
    assert_eq!(interests.cols(), target.len(), "interest width vs target length");
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for r in 0..interests.rows() {
        let s = dot(interests.row(r), target);
        if s > best_score {
            best = r;
            best_score = s;
        }
    }
    best
}

/// Selected interest row as a `1×d` node; the index is a constant.
pub fn selected_row(tape: &mut Tape<'_>, interests: Var, index: usize) -> Var {
    tape.gather_rows(interests, &[index])
}

/// `−log softmax` of the target logit against the listed negatives.
pub fn sampled_softmax_loss(
    tape: &mut Tape<'_>,
    vars: &ParamVars,
    selected: Var,
    target: usize,
    negatives: &[usize],
) -> Result<Var> {
    if target >= vars.pad {
        return Err(Error::OutOfRange {
            what: "item vocabulary",
            index: target,
            size: vars.pad,
        });
    }
    if negatives.contains(&target) {
        return Err(Error::InvalidArgument(format!("target {target} listed among negatives")));
    }
    if let Some(&bad) = negatives.iter().find(|&&n| n >= vars.pad) {
        return Err(Error::InvalidArgument(format!(
            "negative {bad} is the pad index or outside the vocabulary"
        )));
    }
    let mut candidates = Vec::with_capacity(negatives.len() + 1);
    candidates.push(target);
    candidates.extend_from_slice(negatives);
    let emb = tape.gather_rows(vars.items, &candidates);
    let logits = tape.matmul_transb(emb, selected);
    let lse = tape.log_sum_exp(logits);
    let positive = tape.entry(logits, 0, 0);
    Ok(tape.sub(lse, positive))
}

/// `w · loss` with `w` held constant.
pub fn weighted_loss(tape: &mut Tape<'_>, loss: Var, weight: f64) -> Var {
    tape.scale(loss, weight)
}

/// Everything one example contributes to a training tape.
#[derive(Debug, Clone, Copy)]
pub struct ExampleNodes {
    pub interests: Var,
    pub selected: usize,
    /// Unweighted loss.
    pub loss: Var,
}

/// Embedding, extraction, selection and loss for one example.
pub fn example_forward(
    tape: &mut Tape<'_>,
    vars: &ParamVars,
    prefix: &[usize],
    target: usize,
    negatives: &[usize],
) -> Result<ExampleNodes> {
    let e = build_input_embedding(tape, vars, prefix, prefix.len())?;
    let nodes = extract_interests(tape, vars, e, None);
    let target_row = tape.value(vars.items).row(target).to_vec();
    let selected = select_interest(tape.value(nodes.interests), &target_row);
    let row = selected_row(tape, nodes.interests, selected);
    let loss = sampled_softmax_loss(tape, vars, row, target, negatives)?;
    Ok(ExampleNodes {
        interests: nodes.interests,
        selected,
        loss,
    })
}

/// Interest matrix for a history, using its most recent `l_max` items.
pub fn infer_interests(params: &ModelParams, history: &[usize]) -> Result<Matrix> {
    let l_max = params.positions.rows();
    let window = &history[history.len().saturating_sub(l_max)..];
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let e = build_input_embedding(&mut tape, &vars, window, window.len())?;
    let nodes = extract_interests(&mut tape, &vars, e, None);
    Ok(tape.value(nodes.interests).clone())
}

/// `k` distinct items drawn uniformly from `[0, num_items)` without `target`.
/// Returns every other item when fewer than `k` exist.
pub fn sample_negatives(rng: &mut impl Rng, num_items: usize, target: usize, k: usize) -> Vec<usize> {
    let pool = num_items.saturating_sub(1);
    let shift = |i: usize| if i >= target { i + 1 } else { i };
    if k >= pool {
        return (0..pool).map(shift).collect();
    }
    index::sample(rng, pool, k).into_iter().map(shift).collect()
}
