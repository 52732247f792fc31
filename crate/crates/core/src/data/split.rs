//! Classic (user-disjoint) and OOD (temporal, covariate-shift) splits.

use sha2::{Digest, Sha256};

use super::{SequenceDataset, UserSequence};
use crate::error::{Error, Result};

/// Users shorter than this go to the training partition only.
pub const OOD_MIN_LEN: usize = 10;
pub const OOD_TRAIN_FRACTION: f64 = 0.5;
pub const OOD_VALID_FRACTION: f64 = 0.1;

const Z_RANGE: (f64, f64) = (0.5, 0.9);

#[derive(Debug, Clone)]
pub struct ClassicSplit {
    pub train: SequenceDataset,
    pub valid: SequenceDataset,
    pub test: SequenceDataset,
}

#[derive(Debug, Clone)]
pub struct OodSplit {
    pub train: SequenceDataset,
    pub valid: SequenceDataset,
    pub test_inputs: SequenceDataset,
    pub test_targets: SequenceDataset,
}

/// `⌊fraction · len⌋`, robust to representation error in the product.
pub(crate) fn floor_fraction(fraction: f64, len: usize) -> usize {
    (fraction * len as f64 + 1e-9).floor() as usize
}

fn user_key(seed: u64, user_id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(user_id.as_bytes());
    h.finalize().into()
}

/// Partitions users into train/valid/test.
///
/// Users are ordered by a keyed hash of `(seed, user_id)` and cut at
/// `⌊ratio · n⌋` (valid and test get at least one user each), so the outcome
/// depends only on the user set, the ratios and the seed.
pub fn split_classic(ds: &SequenceDataset, ratios: (f64, f64, f64), seed: u64) -> Result<ClassicSplit> {
    let (rt, rv, rs) = ratios;
    if !(rt > 0.0 && rv > 0.0 && rs > 0.0) || ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be positive and sum to 1, got ({rt}, {rv}, {rs})"
        )));
    }
    let n = ds.sequences.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("classic split needs at least 3 users, got {n}")));
    }
    let n_valid = floor_fraction(rv, n).max(1);
    let n_test = floor_fraction(rs, n).max(1);
    if n_valid + n_test >= n {
        return Err(Error::InvalidArgument(format!(
            "ratios ({rt}, {rv}, {rs}) leave no training users out of {n}"
        )));
    }
    let n_train = n - n_valid - n_test;

    let keys: Vec<[u8; 32]> = ds
        .sequences
        .iter()
        .map(|s| user_key(seed, ds.users.id(s.user)))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]).then(a.cmp(&b)));

    let mut bucket = vec![0u8; n];
    for (rank, &pos) in order.iter().enumerate() {
        bucket[pos] = if rank < n_train {
            0
        } else if rank < n_train + n_valid {
            1
        } else {
            2
        };
    }
    let pick = |b: u8| -> Vec<UserSequence> {
        ds.sequences
            .iter()
            .zip(&bucket)
            .filter(|(_, &x)| x == b)
            .map(|(s, _)| s.clone())
            .collect()
    };
    Ok(ClassicSplit {
        train: ds.with_sequences(pick(0)),
        valid: ds.with_sequences(pick(1)),
        test: ds.with_sequences(pick(2)),
    })
}

/// Temporal split with covariate-shift ratio `z`.
///
/// Per user of length `len ≥ OOD_MIN_LEN`: the first `⌊0.5·len⌋` events go to
/// train, the next `⌊0.1·len⌋` to valid, the first `⌊z·len⌋` are test inputs
/// and the rest test targets. Shorter users go to train whole.
pub fn split_ood(ds: &SequenceDataset, z: f64) -> Result<OodSplit> {
    if !(Z_RANGE.0..=Z_RANGE.1).contains(&z) {
        return Err(Error::InvalidArgument(format!(
            "shift ratio z must lie in [{}, {}], got {z}",
            Z_RANGE.0, Z_RANGE.1
        )));
    }
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for s in &ds.sequences {
        let len = s.len();
        if len < OOD_MIN_LEN {
            train.push(s.clone());
            continue;
        }
        let n_train = floor_fraction(OOD_TRAIN_FRACTION, len).max(1);
        let n_valid = floor_fraction(OOD_VALID_FRACTION, len);
        let n_input = floor_fraction(z, len);
        train.push(s.slice(0, n_train));
        if n_valid > 0 {
            valid.push(s.slice(n_train, n_train + n_valid));
        }
        if n_input > 0 && n_input < len {
            inputs.push(s.slice(0, n_input));
            targets.push(s.slice(n_input, len));
        }
    }
    Ok(OodSplit {
        train: ds.with_sequences(train),
        valid: ds.with_sequences(valid),
        test_inputs: ds.with_sequences(inputs),
        test_targets: ds.with_sequences(targets),
    })
}

/// One evaluation event: a history to encode and the relevant items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalCase {
    pub user: usize,
    pub history: Vec<usize>,
    /// Sorted, deduplicated.
    pub targets: Vec<usize>,
}

/// Evaluation events over one item vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalSet {
    pub num_items: usize,
    pub cases: Vec<EvalCase>,
}

impl EvalSet {
    fn case(user: usize, history: &[usize], targets: &[usize]) -> EvalCase {
        let mut t = targets.to_vec();
        t.sort_unstable();
        t.dedup();
        EvalCase {
            user,
            history: history.to_vec(),
            targets: t,
        }
    }

    /// Joins histories and targets by user; users missing either side are
    /// dropped.
    pub fn from_pairs(history: &SequenceDataset, targets: &SequenceDataset) -> Self {
        let cases = targets
            .sequences
            .iter()
            .filter_map(|t| {
                history
                    .sequence_of(t.user)
                    .map(|h| Self::case(t.user, &h.items, &t.items))
            })
            .collect();
        Self {
            num_items: history.num_items(),
            cases,
        }
    }

    /// Holds out the tail of each sequence: the first
    /// `max(1, ⌊input_fraction · len⌋)` events are the history, the rest the
    /// targets. Users with fewer than two events are skipped.
    pub fn holdout(ds: &SequenceDataset, input_fraction: f64) -> Self {
        let cases = ds
            .sequences
            .iter()
            .filter(|s| s.len() >= 2)
            .map(|s| {
                let cut = floor_fraction(input_fraction, s.len()).clamp(1, s.len() - 1);
                Self::case(s.user, &s.items[..cut], &s.items[cut..])
            })
            .collect();
        Self {
            num_items: ds.num_items(),
            cases,
        }
    }

    /// One case per distinct target instead of one per user.
    pub fn expand_targets(&self) -> Self {
        let cases = self
            .cases
            .iter()
            .flat_map(|c| {
                c.targets.iter().map(move |&t| EvalCase {
                    user: c.user,
                    history: c.history.clone(),
                    targets: vec![t],
                })
            })
            .collect();
        Self {
            num_items: self.num_items,
            cases,
        }
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InteractionEvent;

    fn dataset(lengths: &[usize]) -> SequenceDataset {
        let mut events = Vec::new();
        for (u, &len) in lengths.iter().enumerate() {
            for t in 0..len {
                events.push(InteractionEvent {
                    user_id: format!("u{u:03}"),
                    item_id: format!("i{:02}", (u * 7 + t) % 50),
                    timestamp: t as u64,
                });
            }
        }
        SequenceDataset::from_events(&events)
    }

    #[test]
    fn classic_ten_users_gives_8_1_1() {
        let ds = dataset(&[3; 10]);
        let s = split_classic(&ds, (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!(
            (s.train.sequences.len(), s.valid.sequences.len(), s.test.sequences.len()),
            (8, 1, 1)
        );
    }

    #[test]
    fn classic_is_deterministic_and_partitions_users() {
        let ds = dataset(&[4; 37]);
        let a = split_classic(&ds, (0.8, 0.1, 0.1), 7).unwrap();
        let b = split_classic(&ds, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.valid, b.valid);
        assert_eq!(a.test, b.test);

        let mut all: Vec<usize> = [&a.train, &a.valid, &a.test]
            .iter()
            .flat_map(|d| d.user_set())
            .collect();
        all.sort();
        assert_eq!(all, ds.user_set());

        let c = split_classic(&ds, (0.8, 0.1, 0.1), 8).unwrap();
        assert_ne!(a.test.user_set(), c.test.user_set());
    }

    #[test]
    fn classic_rejects_tiny_or_bad_input() {
        assert!(split_classic(&dataset(&[2, 2]), (0.8, 0.1, 0.1), 0).is_err());
        assert!(split_classic(&dataset(&[2; 5]), (0.5, 0.5, 0.1), 0).is_err());
        assert!(split_classic(&dataset(&[2; 5]), (1.0, 0.0, 0.0), 0).is_err());
    }

    #[test]
    fn ood_ten_events_at_half() {
        let ds = dataset(&[10]);
        let s = split_ood(&ds, 0.5).unwrap();
        assert_eq!(s.train.sequences[0].len(), 5);
        assert_eq!(s.valid.sequences[0].len(), 1);
        assert_eq!(s.test_inputs.sequences[0].len(), 5);
        assert_eq!(s.test_targets.sequences[0].len(), 5);
    }

    #[test]
    fn ood_short_user_is_train_only() {
        let ds = dataset(&[9]);
        let s = split_ood(&ds, 0.7).unwrap();
        assert_eq!(s.train.sequences[0].len(), 9);
        assert!(s.valid.sequences.is_empty());
        assert!(s.test_inputs.sequences.is_empty());
        assert!(s.test_targets.sequences.is_empty());
    }

    #[test]
    fn ood_twenty_events_at_ninety_percent() {
        let s = split_ood(&dataset(&[20]), 0.9).unwrap();
        assert_eq!(s.test_inputs.sequences[0].len(), 18);
        assert_eq!(s.test_targets.sequences[0].len(), 2);
    }

    #[test]
    fn ood_rejects_z_outside_range() {
        let ds = dataset(&[12]);
        let err = split_ood(&ds, 0.3).unwrap_err().to_string();
        assert!(err.contains("[0.5, 0.9]"), "{err}");
        assert!(split_ood(&ds, 0.95).is_err());
    }

    #[test]
    fn holdout_and_expansion() {
        let ds = dataset(&[10, 1, 5]);
        let set = EvalSet::holdout(&ds, 0.8);
        assert_eq!(set.len(), 2);
        assert_eq!(set.cases[0].history.len(), 8);
        assert_eq!(set.cases[0].targets.len(), 2);
        assert_eq!(set.cases[1].history.len(), 4);
        let expanded = set.expand_targets();
        assert_eq!(expanded.len(), 3);
        assert!(expanded.cases.iter().all(|c| c.targets.len() == 1));
    }
}
