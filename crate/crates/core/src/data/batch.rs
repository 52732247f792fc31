use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SequenceDataset;

/// Next-item prediction example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    /// Dense and stable: position in the output of [`make_examples`].
    pub sample_id: usize,
    pub user: usize,
    /// Most recent events before the target, oldest first.
    pub prefix: Vec<usize>,
    pub target: usize,
}

/// One example per `(user, t)` with `t ≥ 1`; prefixes keep the most recent
/// `min(t, l_max)` events.
pub fn make_examples(ds: &SequenceDataset, l_max: usize) -> Vec<TrainingExample> {
    assert!(l_max >= 1, "l_max must be at least 1");
    let mut out = Vec::new();
    for s in &ds.sequences {
        for t in 1..s.items.len() {
            let start = t.saturating_sub(l_max);
            out.push(TrainingExample {
                sample_id: out.len(),
                user: s.user,
                prefix: s.items[start..t].to_vec(),
                target: s.items[t],
            });
        }
    }
    out
}

/// Padded mini-batch. Row `i` of `prefixes` holds `valid_lengths[i]` item
/// indices followed by the pad index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub l_max: usize,
    pub pad: usize,
    pub prefixes: Vec<usize>,
    pub valid_lengths: Vec<usize>,
    pub targets: Vec<usize>,
    pub sample_ids: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Unpadded prefix of row `i`.
    pub fn prefix(&self, i: usize) -> &[usize] {
        let row = &self.prefixes[i * self.l_max..(i + 1) * self.l_max];
        &row[..self.valid_lengths[i]]
    }

    /// Full padded row `i`.
    pub fn padded_row(&self, i: usize) -> &[usize] {
        &self.prefixes[i * self.l_max..(i + 1) * self.l_max]
    }
}

/// Iterator over one epoch of shuffled batches.
pub struct BatchIter<'a> {
    examples: &'a [TrainingExample],
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    l_max: usize,
    pad: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let rows = &self.order[self.pos..end];
        self.pos = end;

        let mut batch = Batch {
            l_max: self.l_max,
            pad: self.pad,
            prefixes: vec![self.pad; rows.len() * self.l_max],
            valid_lengths: Vec::with_capacity(rows.len()),
            targets: Vec::with_capacity(rows.len()),
            sample_ids: Vec::with_capacity(rows.len()),
        };
        for (r, &idx) in rows.iter().enumerate() {
            let ex = &self.examples[idx];
            let prefix = &ex.prefix[ex.prefix.len().saturating_sub(self.l_max)..];
            batch.prefixes[r * self.l_max..r * self.l_max + prefix.len()].copy_from_slice(prefix);
            batch.valid_lengths.push(prefix.len());
            batch.targets.push(ex.target);
            batch.sample_ids.push(ex.sample_id);
        }
        Some(batch)
    }
}

/// Batches one epoch in a seeded permutation; the last batch may be short.
///
/// The permutation depends only on `(seed, epoch)`.
pub fn batch_iter(
    examples: &[TrainingExample],
    batch_size: usize,
    l_max: usize,
    pad: usize,
    seed: u64,
    epoch: u64,
) -> BatchIter<'_> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    BatchIter {
        examples,
        order,
        pos: 0,
        batch_size,
        l_max,
        pad,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InteractionEvent;

    fn abc() -> SequenceDataset {
        let events: Vec<InteractionEvent> = ["a", "b", "c"]
            .iter()
            .enumerate()
            .map(|(t, i)| InteractionEvent {
                user_id: "u".into(),
                item_id: (*i).into(),
                timestamp: t as u64,
            })
            .collect();
        SequenceDataset::from_events(&events)
    }

    #[test]
    fn prefixes_and_targets() {
        let ex = make_examples(&abc(), 20);
        assert_eq!(ex.len(), 2);
        assert_eq!((ex[0].prefix.clone(), ex[0].target), (vec![0], 1));
        assert_eq!((ex[1].prefix.clone(), ex[1].target), (vec![0, 1], 2));
    }

    #[test]
    fn truncation_keeps_most_recent() {
        let ex = make_examples(&abc(), 1);
        assert_eq!(ex[0].prefix, vec![0]);
        assert_eq!(ex[1].prefix, vec![1]);
    }

    fn examples(n: usize) -> Vec<TrainingExample> {
        (0..n)
            .map(|i| TrainingExample {
                sample_id: i,
                user: i,
                prefix: vec![i % 3],
                target: 4,
            })
            .collect()
    }

    #[test]
    fn batch_sizes_with_short_tail() {
        let ex = examples(5);
        let sizes: Vec<usize> = batch_iter(&ex, 2, 3, 9, 0, 0).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
    }

    #[test]
    fn epoch_is_a_seeded_permutation() {
        let ex = examples(50);
        let ids = |seed, epoch| -> Vec<usize> {
            batch_iter(&ex, 7, 3, 9, seed, epoch)
                .flat_map(|b| b.sample_ids)
                .collect()
        };
        assert_eq!(ids(3, 1), ids(3, 1));
        assert_ne!(ids(3, 1), ids(3, 2));
        let mut sorted = ids(3, 1);
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn padding_fills_tail() {
        let ex = examples(1);
        let b = batch_iter(&ex, 1, 3, 9, 0, 0).next().unwrap();
        assert_eq!(b.padded_row(0), &[0, 9, 9]);
        assert_eq!(b.prefix(0), &[0]);
    }
}
