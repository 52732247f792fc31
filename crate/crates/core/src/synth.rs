//! Synthetic sequences with tunable co-occurrence between item clusters.
//!
//! Items are split evenly into `g` clusters. Every user has a primary
//! cluster `p` and its companion `(p + 1) mod g`. Each event is drawn from
//! the primary cluster with probability `primary_share`; otherwise it comes
//! from the companion with probability `rho` and from a uniformly chosen
//! non-primary cluster with probability `1 − rho`. Train and test share users,
//! primaries and item clusters and differ only in `rho`.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{SequenceDataset, UserSequence, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub clusters: usize,
    /// Inclusive sequence length range.
    pub min_len: usize,
    pub max_len: usize,
    pub rho_train: f64,
    pub rho_test: f64,
    /// Probability that an event comes from the user's primary cluster.
    pub primary_share: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_users: 2000,
            num_items: 1000,
            clusters: 4,
            min_len: 20,
            max_len: 40,
            rho_train: 0.9,
            rho_test: 0.1,
            primary_share: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.clusters < 2 {
            return bad(format!("need at least 2 clusters, got {}", self.clusters));
        }
        if self.num_items < self.clusters {
            return bad(format!(
                "{} items cannot fill {} clusters",
                self.num_items, self.clusters
            ));
        }
        if self.num_users == 0 {
            return bad("num_users must be positive".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!("bad length range [{}, {}]", self.min_len, self.max_len));
        }
        for (name, v) in [
            ("rho_train", self.rho_train),
            ("rho_test", self.rho_test),
            ("primary_share", self.primary_share),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

/// Generated pair plus the latent structure behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub train: SequenceDataset,
    pub test: SequenceDataset,
    /// Cluster of each item index.
    pub item_cluster: Vec<usize>,
    /// Primary cluster of each user index.
    pub primary: Vec<usize>,
}

impl SynthData {
    pub fn companion(&self, user: usize) -> usize {
        (self.primary[user] + 1) % self.clusters()
    }

    pub fn clusters(&self) -> usize {
        self.item_cluster.iter().max().map_or(0, |m| m + 1)
    }
}

fn padded_ids(prefix: char, n: usize) -> Vocabulary {
    let width = n.saturating_sub(1).to_string().len();
    Vocabulary::from_ordered((0..n).map(|i| format!("{prefix}{i:0width$}")).collect())
}

/// Cluster of every item: a seeded permutation cut into `g` near-equal runs.
pub fn item_clusters(num_items: usize, clusters: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..num_items).collect();
    order.shuffle(&mut rng);
    let mut out = vec![0; num_items];
    for (pos, &item) in order.iter().enumerate() {
        out[item] = pos * clusters / num_items;
    }
    out
}

fn sequence(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    members: &[Vec<usize>],
    primary: usize,
    rho: f64,
) -> Vec<usize> {
    let g = cfg.clusters;
    let len = rng.random_range(cfg.min_len..=cfg.max_len);
    (0..len)
        .map(|_| {
            let cluster = if rng.random_bool(cfg.primary_share) {
                primary
            } else if rng.random_bool(rho) {
                (primary + 1) % g
            } else {
                (primary + 1 + rng.random_range(0..g - 1)) % g
            };
            let pool = &members[cluster];
            pool[rng.random_range(0..pool.len())]
        })
        .collect()
}

/// Train and test datasets over one user and item vocabulary.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let item_cluster = item_clusters(cfg.num_items, cfg.clusters, cfg.seed);
    let mut members = vec![Vec::new(); cfg.clusters];
    for (item, &c) in item_cluster.iter().enumerate() {
        members[c].push(item);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let primary: Vec<usize> = (0..cfg.num_users).map(|_| rng.random_range(0..cfg.clusters)).collect();

    let users = Arc::new(padded_ids('u', cfg.num_users));
    let items = Arc::new(padded_ids('i', cfg.num_items));
    let build = |stream_base: u64, rho: f64| {
        let sequences = (0..cfg.num_users)
            .map(|u| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(stream_base + 2 * u as u64);
                let items = sequence(&mut rng, cfg, &members, primary[u], rho);
                UserSequence {
                    user: u,
                    timestamps: (0..items.len() as u64).collect(),
                    items,
                }
            })
            .collect();
        SequenceDataset {
            users: Arc::clone(&users),
            items: Arc::clone(&items),
            sequences,
        }
    };
    let train = build(2, cfg.rho_train);
    let test = build(3, cfg.rho_test);
    Ok(SynthData {
        train,
        test,
        item_cluster,
        primary,
    })
}
