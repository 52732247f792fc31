//! Interaction logs, vocabularies, splits, training examples and batches.

mod batch;
mod io;
mod split;

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};

pub use batch::{batch_iter, make_examples, Batch, BatchIter, TrainingExample};
pub use io::{export_tsv, ingest, ingest_with, read_events, read_vocab, write_vocab, IngestReport};
pub use split::{
    split_classic, split_ood, ClassicSplit, EvalCase, EvalSet, OodSplit, OOD_MIN_LEN,
    OOD_TRAIN_FRACTION, OOD_VALID_FRACTION,
};

/// One raw `(user, item, time)` record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionEvent {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: u64,
}

/// Bijection between opaque string ids and dense indices.
///
/// Indices follow the lexicographic order of the ids, so the mapping only
/// depends on the set of ids and never on input order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_ids<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        ids.sort();
        ids.dedup();
        Self::from_ordered(ids)
    }

    /// Keeps the given order; ids must be unique.
    pub(crate) fn from_ordered(ids: Vec<String>) -> Self {
        let index = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { ids, index }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Time-ordered events of one user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSequence {
    pub user: usize,
    pub items: Vec<usize>,
    pub timestamps: Vec<u64>,
}

impl UserSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub(crate) fn slice(&self, start: usize, end: usize) -> UserSequence {
        UserSequence {
            user: self.user,
            items: self.items[start..end].to_vec(),
            timestamps: self.timestamps[start..end].to_vec(),
        }
    }
}

/// Per-user item sequences over shared user and item vocabularies.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub users: Arc<Vocabulary>,
    pub items: Arc<Vocabulary>,
    /// Sorted by user index; every sequence is nonempty.
    pub sequences: Vec<UserSequence>,
}

impl SequenceDataset {
    /// Groups events by user over vocabularies built from the events.
    pub fn from_events(events: &[InteractionEvent]) -> Self {
        let users = Arc::new(Vocabulary::from_ids(events.iter().map(|e| e.user_id.as_str())));
        let items = Arc::new(Vocabulary::from_ids(events.iter().map(|e| e.item_id.as_str())));
        Self::from_events_with(events, users, items).expect("vocabularies cover every event")
    }

    /// Groups events by user over existing vocabularies.
    ///
    /// Within a user, events are ordered by timestamp with ties kept in
    /// input order.
    pub fn from_events_with(
        events: &[InteractionEvent],
        users: Arc<Vocabulary>,
        items: Arc<Vocabulary>,
    ) -> Result<Self> {
        let mut per_user: Vec<Vec<(u64, usize)>> = vec![Vec::new(); users.len()];
        for e in events {
            let u = users
                .get(&e.user_id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown user id {:?}", e.user_id)))?;
            let i = items
                .get(&e.item_id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown item id {:?}", e.item_id)))?;
            per_user[u].push((e.timestamp, i));
        }
        let sequences = per_user
            .into_iter()
            .enumerate()
            .filter(|(_, ev)| !ev.is_empty())
            .map(|(user, mut ev)| {
                ev.sort_by_key(|&(ts, _)| ts);
                UserSequence {
                    user,
                    timestamps: ev.iter().map(|&(ts, _)| ts).collect(),
                    items: ev.iter().map(|&(_, i)| i).collect(),
                }
            })
            .collect();
        Ok(Self {
            users,
            items,
            sequences,
        })
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    /// The reserved padding index, one past the last real item.
    pub fn pad_index(&self) -> usize {
        self.items.len()
    }

    pub fn num_events(&self) -> usize {
        self.sequences.iter().map(UserSequence::len).sum()
    }

    pub fn user_set(&self) -> Vec<usize> {
        self.sequences.iter().map(|s| s.user).collect()
    }

    pub fn sequence_of(&self, user: usize) -> Option<&UserSequence> {
        self.sequences
            .binary_search_by_key(&user, |s| s.user)
            .ok()
            .map(|i| &self.sequences[i])
    }

    /// Flattens back to events in user order.
    pub fn events(&self) -> Vec<InteractionEvent> {
        self.sequences
            .iter()
            .flat_map(|s| {
                s.items.iter().zip(&s.timestamps).map(move |(&i, &ts)| InteractionEvent {
                    user_id: self.users.id(s.user).to_string(),
                    item_id: self.items.id(i).to_string(),
                    timestamp: ts,
                })
            })
            .collect()
    }

    pub(crate) fn with_sequences(&self, sequences: Vec<UserSequence>) -> Self {
        Self {
            users: Arc::clone(&self.users),
            items: Arc::clone(&self.items),
            sequences,
        }
    }

    /// Checks the structural invariants of the dataset.
    pub fn validate(&self) -> Result<()> {
        let mut last_user = None;
        for s in &self.sequences {
            if s.is_empty() || s.items.len() != s.timestamps.len() {
                return Err(Error::InvalidArgument(format!("malformed sequence for user {}", s.user)));
            }
            if last_user.is_some_and(|u| u >= s.user) || s.user >= self.users.len() {
                return Err(Error::InvalidArgument("users out of order or out of range".into()));
            }
            last_user = Some(s.user);
            if let Some(&bad) = s.items.iter().find(|&&i| i >= self.items.len()) {
                return Err(Error::OutOfRange {
                    what: "item vocabulary",
                    index: bad,
                    size: self.items.len(),
                });
            }
            if s.timestamps.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::InvalidArgument(format!("user {} is not time-ordered", s.user)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(u: &str, i: &str, t: u64) -> InteractionEvent {
        InteractionEvent {
            user_id: u.into(),
            item_id: i.into(),
            timestamp: t,
        }
    }

    #[test]
    fn groups_and_orders_by_time() {
        let ds = SequenceDataset::from_events(&[ev("u1", "b", 5), ev("u2", "a", 1), ev("u1", "a", 2)]);
        let lens: Vec<usize> = ds.sequences.iter().map(UserSequence::len).collect();
        assert_eq!(lens, vec![2, 1]);
        assert_eq!(ds.sequences[0].items, vec![0, 1]);
        ds.validate().unwrap();
    }

    #[test]
    fn ties_keep_input_order() {
        let ds = SequenceDataset::from_events(&[ev("u", "z", 3), ev("u", "a", 3), ev("u", "m", 3)]);
        let ids: Vec<&str> = ds.sequences[0].items.iter().map(|&i| ds.items.id(i)).collect();
        assert_eq!(ids, vec!["z", "a", "m"]);
    }

    #[test]
    fn pad_index_is_outside_vocabulary() {
        let ds = SequenceDataset::from_events(&[ev("u", "x", 0), ev("u", "y", 1)]);
        assert_eq!(ds.pad_index(), 2);
        assert!(ds.sequences.iter().flat_map(|s| &s.items).all(|&i| i != ds.pad_index()));
    }
}
